#pragma once

namespace dlab {

/// Entry point of the `dlab` binary. Returns the process exit code; failures
/// print one diagnostic line on stderr.
int run_cli(int argc, char** argv);

}  // namespace dlab
