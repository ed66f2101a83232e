#pragma once
// Batch front end.  One JSON config drives a subcommand; outputs land in the
// --out directory as JSON/CSV carrying the config hash.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace phylosim {

// Exit codes: 0 success, 1 I/O or config problems, 2 model assumption
// violations, 3 a check subcommand found a failing check.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// FNV-1a helper exposed for tests; the CLI stamps outputs with the hash of
// the canonical config dump plus the effective seed.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace phylosim
