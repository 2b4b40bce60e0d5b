#pragma once

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace grain {

/// Stderr logger whose level follows GRAIN_LOG (error | info | debug; default error).
inline spdlog::logger& log() {
  static auto logger = [] {
    auto l = spdlog::stderr_color_mt("grain");
    l->set_pattern("[%H:%M:%S] [%l] %v");
    const char* env = std::getenv("GRAIN_LOG");
    const std::string level = env ? env : "error";
    if (level == "debug")
      l->set_level(spdlog::level::debug);
    else if (level == "info")
      l->set_level(spdlog::level::info);
    else
      l->set_level(spdlog::level::err);
    return l;
  }();
  return *logger;
}

}  // namespace grain
