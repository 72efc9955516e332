#pragma once

// Umbrella header for the whole toolkit.

#include "sdm/autodiff.hpp"
#include "sdm/checklist.hpp"
#include "sdm/common.hpp"
#include "sdm/gbrt.hpp"
#include "sdm/masking.hpp"
#include "sdm/metrics.hpp"
#include "sdm/nn.hpp"
#include "sdm/pipeline.hpp"
#include "sdm/raster.hpp"
#include "sdm/split.hpp"
#include "sdm/synth.hpp"
