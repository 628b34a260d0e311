#pragma once

#include "mcsens/errors.hpp"
#include "mcsens/kernel_algebra.hpp"
#include "mcsens/csv_io.hpp"
#include "mcsens/param_family.hpp"
#include "mcsens/builtin_families.hpp"
#include "mcsens/random_horizon.hpp"
#include "mcsens/stationary.hpp"
#include "mcsens/rng.hpp"
#include "mcsens/simulation.hpp"
#include "mcsens/gg1.hpp"
