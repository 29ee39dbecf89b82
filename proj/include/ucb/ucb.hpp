#pragma once

#include "ucb/binary_io.hpp"
#include "ucb/config.hpp"
#include "ucb/data.hpp"
#include "ucb/errors.hpp"
#include "ucb/experiment.hpp"
#include "ucb/gradient.hpp"
#include "ucb/harness.hpp"
#include "ucb/metrics.hpp"
#include "ucb/network.hpp"
#include "ucb/optimizer.hpp"
#include "ucb/persistence.hpp"
#include "ucb/variational.hpp"
