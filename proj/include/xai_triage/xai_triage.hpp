#pragma once

#include "xai_triage/accuracy.hpp"
#include "xai_triage/error.hpp"
#include "xai_triage/heatmap.hpp"
#include "xai_triage/image.hpp"
#include "xai_triage/localization.hpp"
#include "xai_triage/lrp.hpp"
#include "xai_triage/manifest.hpp"
#include "xai_triage/model_io.hpp"
#include "xai_triage/network.hpp"
#include "xai_triage/pipeline.hpp"
#include "xai_triage/rebalance.hpp"
#include "xai_triage/sharpness.hpp"
#include "xai_triage/tensor.hpp"
