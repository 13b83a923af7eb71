#pragma once

#include "qrgt/types.hpp"
#include "qrgt/random.hpp"
#include "qrgt/stiefel.hpp"
#include "qrgt/quantizer.hpp"
#include "qrgt/network.hpp"
#include "qrgt/problems.hpp"
#include "qrgt/metrics.hpp"
#include "qrgt/engine.hpp"
#include "qrgt/harness.hpp"
