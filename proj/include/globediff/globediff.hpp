#pragma once

#include "analysis.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "gradcheck.hpp"
#include "hungarian.hpp"
#include "latent.hpp"
#include "model.hpp"
#include "netcore.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "synth.hpp"
