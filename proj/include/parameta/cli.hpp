#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace parameta {

// Exit codes: 0 success, 1 invalid input, 2 runtime or numeric failure.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

}  // namespace parameta
