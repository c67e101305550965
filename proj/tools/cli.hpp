#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace brainseg::cli {

/// Runs one subcommand. Returns the process exit code (0 ok, 2 config, 3 data, 4 divergence);
/// failures print a single "error: ..." line to `err`.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

/// Convenience for tests and scripts: argv[0] is supplied.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// CRC-32 of a file's bytes, as 8 lowercase hex digits.
std::string file_crc32(const std::string& path);

}  // namespace brainseg::cli
