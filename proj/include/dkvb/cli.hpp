#ifndef DKVB_CLI_HPP
#define DKVB_CLI_HPP

#include <string>
#include <vector>

namespace dkvb {

/// Command-line front end. Subcommands: gen-toy, init-keys, train, eval,
/// baseline, prune, report, noise-sweep. Every run is fully determined by
/// (JSON config file + flag overrides + master seed); the effective resolved
/// config is echoed to the --out directory so feeding it back via --config
/// reproduces the run. Exit codes: 0 success, 1 usage or configuration
/// error, 2 data or format error, 3 state/contract error.
int dispatch(int argc, const char* const* argv);

/// Convenience overload; args[0] is the program name.
int dispatch(const std::vector<std::string>& args);

}  // namespace dkvb

#endif  // DKVB_CLI_HPP
