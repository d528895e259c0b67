#pragma once

#include "mlrisk/error.hpp"
#include "mlrisk/csv.hpp"
#include "mlrisk/spmat.hpp"
#include "mlrisk/ingest.hpp"
#include "mlrisk/netmodel.hpp"
#include "mlrisk/pagerank.hpp"
#include "mlrisk/windows.hpp"
#include "mlrisk/tsa.hpp"

namespace mlrisk {
inline constexpr const char* kVersion = "0.1.0";
}
