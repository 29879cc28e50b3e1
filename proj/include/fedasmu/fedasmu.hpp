#pragma once

#include "fedasmu/config.hpp"
#include "fedasmu/device_runtime.hpp"
#include "fedasmu/errors.hpp"
#include "fedasmu/experiment.hpp"
#include "fedasmu/gradcheck.hpp"
#include "fedasmu/metrics.hpp"
#include "fedasmu/params.hpp"
#include "fedasmu/rng.hpp"
#include "fedasmu/server_agg.hpp"
#include "fedasmu/sim_engine.hpp"
#include "fedasmu/slot_selector.hpp"
#include "fedasmu/strategies.hpp"
#include "fedasmu/tasks.hpp"
#include "fedasmu/trace.hpp"
