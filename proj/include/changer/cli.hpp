#pragma once

#include <ostream>

namespace changer {

/// `changer {train|eval|gradcheck|ablate}`. Returns the process exit code:
/// 0 success, 1 usage or configuration error, 2 numeric failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace changer
