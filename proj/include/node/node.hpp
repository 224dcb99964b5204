#pragma once

#include "node/channel.hpp"
#include "node/defense.hpp"
#include "node/errors.hpp"
#include "node/harness.hpp"
#include "node/rng.hpp"
#include "node/rxdsp.hpp"
#include "node/signal_core.hpp"
#include "node/trace_io.hpp"
#include "node/txmod.hpp"
