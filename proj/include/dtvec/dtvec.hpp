#pragma once

// Everything at once.

#include "dtvec/baselines.hpp"
#include "dtvec/environment.hpp"
#include "dtvec/error.hpp"
#include "dtvec/experiment.hpp"
#include "dtvec/mamo.hpp"
#include "dtvec/neural.hpp"
#include "dtvec/scenario.hpp"
#include "dtvec/sensing_queue.hpp"
#include "dtvec/twin_metrics.hpp"
#include "dtvec/v2i_channel.hpp"
