#pragma once

#include "warpthermo/analyzer.hpp"
#include "warpthermo/core.hpp"
#include "warpthermo/patterns.hpp"
#include "warpthermo/pipeline.hpp"
#include "warpthermo/report.hpp"
#include "warpthermo/simt_sim.hpp"
#include "warpthermo/trace_io.hpp"
