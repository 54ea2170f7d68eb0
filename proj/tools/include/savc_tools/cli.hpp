#pragma once

#include <string>
#include <vector>

namespace savc {

// Exit codes: 0 ok, 1 other failure, 2 usage / unknown subcommand,
// 3 config error, 4 validation or stage error.
int cli_main(int argc, char** argv);
int cli_main(const std::vector<std::string>& args);

}  // namespace savc
