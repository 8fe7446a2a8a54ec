#include <iostream>
#include <string>

#include "npmpc/acceptance.hpp"

int main(int argc, char** argv) {
  npmpc::AcceptanceOptions opts;
  opts.verbose = argc > 1 && std::string(argv[1]) == "-v";
  bool all = true;
  npmpc::run_acceptance(opts, [&](const npmpc::CriterionResult& r) {
    all = all && r.pass;
    std::cout << npmpc::format_result(r) << std::endl;
  });
  return all ? 0 : 1;
}
