#pragma once

#include "tdt/common.hpp"
#include "tdt/ingest.hpp"
#include "tdt/repr.hpp"
#include "tdt/learn.hpp"
#include "tdt/heatmap.hpp"
#include "tdt/events.hpp"
#include "tdt/session.hpp"
#include "tdt/harness.hpp"
