// Command-line front end: encode, sample, train, eval and dataset cache.
#pragma once

#include <iosfwd>

namespace fqp::cli {

// Runs one command. Human-readable progress goes to `out`; failures print a
// single JSON object {"error": {...}} to `err`. Returns 0 on success, 2 for
// usage errors and 1 for everything else.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fqp::cli
