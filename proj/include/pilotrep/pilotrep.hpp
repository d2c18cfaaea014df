#pragma once

#include "pilotrep/anomaly.hpp"
#include "pilotrep/errors.hpp"
#include "pilotrep/format.hpp"
#include "pilotrep/lifetime.hpp"
#include "pilotrep/rng.hpp"
#include "pilotrep/rrcf.hpp"
#include "pilotrep/selection.hpp"
#include "pilotrep/simulate.hpp"
#include "pilotrep/synthetic.hpp"
#include "pilotrep/trace.hpp"
#include "pilotrep/valleys.hpp"
