#pragma once

#include "seqrd/closed_forms.hpp"
#include "seqrd/config.hpp"
#include "seqrd/covariance.hpp"
#include "seqrd/discrete_rd.hpp"
#include "seqrd/errors.hpp"
#include "seqrd/gauss_opt.hpp"
#include "seqrd/info_measures.hpp"
#include "seqrd/mc_sim.hpp"
#include "seqrd/source_model.hpp"
