#pragma once

// Umbrella header for the whole toolkit.

#include "polytrack/errors.hpp"
#include "polytrack/geometry.hpp"
#include "polytrack/io.hpp"
#include "polytrack/lam.hpp"
#include "polytrack/losses.hpp"
#include "polytrack/metrics.hpp"
#include "polytrack/rng.hpp"
#include "polytrack/synth.hpp"
#include "polytrack/tracker.hpp"
