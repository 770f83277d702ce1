#pragma once

// Self-binarizing network toolkit: scaled-tanh training, comparison-based
// batch-norm folding, and bit-packed XNOR+popcount inference.

#include "sbnn/adam.hpp"
#include "sbnn/bench.hpp"
#include "sbnn/binrt.hpp"
#include "sbnn/bittensor.hpp"
#include "sbnn/checkpoint.hpp"
#include "sbnn/commands.hpp"
#include "sbnn/config.hpp"
#include "sbnn/constrained_weights.hpp"
#include "sbnn/dataset.hpp"
#include "sbnn/error.hpp"
#include "sbnn/freeze.hpp"
#include "sbnn/histogram.hpp"
#include "sbnn/io.hpp"
#include "sbnn/layer_ops.hpp"
#include "sbnn/model.hpp"
#include "sbnn/schedule.hpp"
#include "sbnn/tensor.hpp"
#include "sbnn/trainer.hpp"
