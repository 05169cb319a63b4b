#pragma once

#include <stdexcept>
#include <string>

namespace ats {

// Error categories map 1:1 onto CLI exit codes:
//   0 success, 2 config error, 3 data error, 4 numeric error.
enum class ErrorKind : int {
  config = 2,
  data = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string msg)
      : std::runtime_error(std::move(msg)), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

#define ATS_DEFINE_ERROR(NAME, KIND)              \
  class NAME : public Error {                     \
   public:                                        \
    explicit NAME(std::string msg)                \
        : Error(ErrorKind::KIND, std::move(msg)) {} \
  };

ATS_DEFINE_ERROR(ConfigError, config)

ATS_DEFINE_ERROR(ManifestError, data)
ATS_DEFINE_ERROR(DuplicateIdError, data)
ATS_DEFINE_ERROR(MissingAudioError, data)
ATS_DEFINE_ERROR(TeacherCoverageError, data)
ATS_DEFINE_ERROR(EnsembleError, data)
ATS_DEFINE_ERROR(AugmentError, data)
ATS_DEFINE_ERROR(CheckpointError, data)

ATS_DEFINE_ERROR(NonFiniteError, numeric)
ATS_DEFINE_ERROR(ShapeError, numeric)
ATS_DEFINE_ERROR(PoolError, numeric)
ATS_DEFINE_ERROR(SequenceTooLongError, numeric)
ATS_DEFINE_ERROR(VocabError, numeric)
ATS_DEFINE_ERROR(ListError, numeric)
ATS_DEFINE_ERROR(MaskError, numeric)
ATS_DEFINE_ERROR(MaskParamError, numeric)
ATS_DEFINE_ERROR(DegenerateError, numeric)

#undef ATS_DEFINE_ERROR

}  // namespace ats
