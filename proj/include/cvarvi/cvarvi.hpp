#pragma once

#include "cvarvi/random.hpp"
#include "cvarvi/cvar.hpp"
#include "cvarvi/geometry.hpp"
#include "cvarvi/problem.hpp"
#include "cvarvi/routing.hpp"
#include "cvarvi/games.hpp"
#include "cvarvi/algorithms.hpp"
#include "cvarvi/analysis.hpp"
#include "cvarvi/presets.hpp"
#include "cvarvi/experiment.hpp"
