#include "mmt/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace mmt {

void init_logging_from_env() {
  auto logger = spdlog::get("mmt");
  if (!logger) logger = spdlog::stderr_color_mt("mmt");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("MMT_LOG_LEVEL")) {
    const std::string level(env);
    if (level == "error") spdlog::set_level(spdlog::level::err);
    if (level == "info") spdlog::set_level(spdlog::level::info);
    if (level == "debug") spdlog::set_level(spdlog::level::debug);
  }
}

}  // namespace mmt
