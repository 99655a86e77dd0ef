#pragma once

/**
 * @file
 * @brief Umbrella header for the whole library.
 */

#include "hsc/config.hpp"
#include "hsc/error.hpp"
#include "hsc/experiment.hpp"
#include "hsc/haptic.hpp"
#include "hsc/hmm.hpp"
#include "hsc/nmpc.hpp"
#include "hsc/operator_model.hpp"
#include "hsc/sim.hpp"
#include "hsc/track.hpp"
#include "hsc/vehicle.hpp"
