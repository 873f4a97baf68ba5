// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moelab/config.hpp"
#include "moelab/error.hpp"
#include "moelab/experiment.hpp"
#include "moelab/gate_analytics.hpp"
#include "moelab/gate_scores.hpp"
#include "moelab/imbalance.hpp"
#include "moelab/perf_model.hpp"
#include "moelab/presets.hpp"
#include "moelab/rng.hpp"
#include "moelab/routing.hpp"
#include "moelab/stats.hpp"
#include "moelab/synthetic.hpp"
#include "moelab/trace.hpp"
