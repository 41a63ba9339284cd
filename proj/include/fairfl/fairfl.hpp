#pragma once

#include "fairfl/analytic.hpp"
#include "fairfl/clustering.hpp"
#include "fairfl/csv.hpp"
#include "fairfl/data.hpp"
#include "fairfl/errors.hpp"
#include "fairfl/fairness.hpp"
#include "fairfl/federation.hpp"
#include "fairfl/harness.hpp"
#include "fairfl/hierarchical.hpp"
#include "fairfl/models.hpp"
#include "fairfl/seed.hpp"
