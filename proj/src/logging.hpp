#pragma once

#include <string>

namespace exacfs::logging {

// Verbosity is read once from EXACFS_LOG (error|info|debug). Default: error.
enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

Level level();

void error(const std::string& msg);
// Warnings are shown at info verbosity and above.
void warn(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

}  // namespace exacfs::logging
