#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace omg::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

inline Level level() {
  static const Level lvl = [] {
    const char* env = std::getenv("OMG_LOG");
    const std::string v = env ? env : "info";
    if (v == "error") return Level::Error;
    if (v == "debug") return Level::Debug;
    return Level::Info;
  }();
  return lvl;
}

inline void write(Level l, const std::string& msg) {
  if (static_cast<int>(l) > static_cast<int>(level())) return;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  static const char* tags[] = {"error", "info", "debug"};
  std::cerr << "[" << tags[static_cast<int>(l)] << "] " << msg << "\n";
}

inline void error(const std::string& m) { write(Level::Error, m); }
inline void info(const std::string& m) { write(Level::Info, m); }
inline void debug(const std::string& m) { write(Level::Debug, m); }

}  // namespace omg::log
