#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rivlpr {

/// Row-major dense matrix; one row per patch, point or descriptor.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Error categories. Values are stable: the C API and CLI exit codes map onto them.
enum class ErrorCode : int {
  kArgument = 1,
  kIo = 2,
  kFormat = 3,
  kAlignment = 4,
  kProtocol = 5,
  kShape = 6,
  kNoCandidate = 7,
  kDiverged = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorCode::kArgument, what);
}

}  // namespace rivlpr
