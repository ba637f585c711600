#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dil {

// Runs one command-line invocation (args exclude the program name).
// Results go to `out`; failures produce one machine-parseable line on
// `err` shaped `error: <category>: <detail>`. Returns the process exit
// code: 0 success, 2 config/usage error, 3 data error, 4 numeric failure,
// 5 checkpoint corruption, 1 anything else.
int cli_main(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err);

}  // namespace dil
