#include "mism/data.hpp"

#include <fstream>
#include <sstream>

namespace mism {

Intrinsics<double> read_intrinsics_file(const std::string& path) {
  std::ifstream is(path);
  MISM_CHECK(is.good(), "cannot open intrinsics file: " + path);
  Mat3<double> K;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      MISM_CHECK(static_cast<bool>(is >> K(r, c)), "intrinsics file must hold 9 reals: " + path);
    }
  return Intrinsics<double>(K);
}

std::vector<SampleId> read_sample_list(const std::string& path) {
  std::ifstream is(path);
  MISM_CHECK(is.good(), "cannot open sample list: " + path);
  std::vector<SampleId> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SampleId id;
    if (ls >> id.sequence >> id.index) out.push_back(id);
  }
  return out;
}

}  // namespace mism
