#pragma once

// Everything except the HTTP service (include suffice/service.hpp for that).

#include "suffice/birl.hpp"
#include "suffice/environments.hpp"
#include "suffice/errors.hpp"
#include "suffice/harness.hpp"
#include "suffice/mdp.hpp"
#include "suffice/risk.hpp"
#include "suffice/rng.hpp"
#include "suffice/serialization.hpp"
#include "suffice/sufficiency.hpp"
