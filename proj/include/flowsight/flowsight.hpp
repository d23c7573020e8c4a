#pragma once

// Umbrella header: packet capture to explained two-stage flow classification.

#include "flowsight/ensemble.hpp"
#include "flowsight/error.hpp"
#include "flowsight/faithfulness.hpp"
#include "flowsight/feature_csv.hpp"
#include "flowsight/features.hpp"
#include "flowsight/flow.hpp"
#include "flowsight/lime.hpp"
#include "flowsight/metrics.hpp"
#include "flowsight/model.hpp"
#include "flowsight/pcap.hpp"
#include "flowsight/pipeline.hpp"
#include "flowsight/report.hpp"
#include "flowsight/rng.hpp"
#include "flowsight/shap.hpp"
#include "flowsight/stats.hpp"
#include "flowsight/synth.hpp"
#include "flowsight/tree.hpp"
#include "flowsight/version.hpp"
