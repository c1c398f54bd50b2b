#pragma once

#include "crossctx/blob_io.hpp"
#include "crossctx/data_model.hpp"
#include "crossctx/dataset_io.hpp"
#include "crossctx/errors.hpp"
#include "crossctx/experiment.hpp"
#include "crossctx/featurize.hpp"
#include "crossctx/kema.hpp"
#include "crossctx/linalg.hpp"
#include "crossctx/neural.hpp"
#include "crossctx/raw_io.hpp"
#include "crossctx/raw_tree.hpp"
#include "crossctx/recognition.hpp"
#include "crossctx/results_io.hpp"
#include "crossctx/rng.hpp"
#include "crossctx/synthgen.hpp"
#include "crossctx/transfer_tl.hpp"
