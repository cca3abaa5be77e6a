#pragma once

#include "lcnet/error.hpp"
#include "lcnet/format.hpp"
#include "lcnet/rng.hpp"
#include "lcnet/linalg.hpp"
#include "lcnet/data.hpp"
#include "lcnet/hmd_coverage.hpp"
#include "lcnet/ingest.hpp"
#include "lcnet/lc_svd.hpp"
#include "lcnet/lc_poisson.hpp"
#include "lcnet/nn/weights.hpp"
#include "lcnet/nn/adam.hpp"
#include "lcnet/nn/layers.hpp"
#include "lcnet/neural_lc.hpp"
#include "lcnet/forecast.hpp"
#include "lcnet/evaluation.hpp"
#include "lcnet/synth.hpp"
#include "lcnet/serialize.hpp"
#include "lcnet/experiment.hpp"
