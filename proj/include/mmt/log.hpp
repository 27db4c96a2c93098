#pragma once

#include <spdlog/spdlog.h>

namespace mmt {

// Reads MMT_LOG_LEVEL (error | info | debug); anything else keeps "warn".
void init_logging_from_env();

}  // namespace mmt
