#pragma once

#include "gmlf/annotations.hpp"
#include "gmlf/autodiff/gradcheck.hpp"
#include "gmlf/autodiff/tensor.hpp"
#include "gmlf/bench/config.hpp"
#include "gmlf/bench/cost.hpp"
#include "gmlf/bench/experiment.hpp"
#include "gmlf/bench/gate_export.hpp"
#include "gmlf/bench/synth.hpp"
#include "gmlf/box.hpp"
#include "gmlf/dataset.hpp"
#include "gmlf/detector/anchors.hpp"
#include "gmlf/detector/backbone.hpp"
#include "gmlf/detector/detector.hpp"
#include "gmlf/detector/loss.hpp"
#include "gmlf/detector/proposals.hpp"
#include "gmlf/detector/sgd.hpp"
#include "gmlf/detector/train.hpp"
#include "gmlf/eval/miss_rate.hpp"
#include "gmlf/gated/gated_extractor.hpp"
#include "gmlf/image.hpp"
#include "gmlf/nn/layers.hpp"
#include "gmlf/nn/params.hpp"
#include "gmlf/serialize.hpp"
