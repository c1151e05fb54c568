#pragma once

#include "igssm/concentration.hpp"
#include "igssm/hierarchical.hpp"
#include "igssm/model.hpp"
#include "igssm/posterior.hpp"
#include "igssm/random.hpp"
#include "igssm/selection.hpp"
