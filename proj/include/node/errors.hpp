#pragma once

#include <stdexcept>
#include <string>

namespace node {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define NODE_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  };

NODE_DEFINE_ERROR(InvalidTrace)
NODE_DEFINE_ERROR(InvalidBand)
NODE_DEFINE_ERROR(InvalidWindow)
NODE_DEFINE_ERROR(EmptyTrace)
NODE_DEFINE_ERROR(SegmentTooLong)
NODE_DEFINE_ERROR(RateMismatch)
NODE_DEFINE_ERROR(EmptyDeviceList)
NODE_DEFINE_ERROR(InvalidAttenuation)
NODE_DEFINE_ERROR(InvalidModel)
NODE_DEFINE_ERROR(LengthMismatch)
NODE_DEFINE_ERROR(SymbolOutOfRange)
NODE_DEFINE_ERROR(DegenerateSpec)
NODE_DEFINE_ERROR(UnknownAxis)
NODE_DEFINE_ERROR(ConfigError)
NODE_DEFINE_ERROR(IoError)

#undef NODE_DEFINE_ERROR

/// Raised by the passband scan when no band on the grid decodes the pilot.
class NoPilotFound : public Error {
 public:
  explicit NoPilotFound(const std::string& what) : Error("NoPilotFound: " + what) {}
};

/// Raised by frame synchronization when no offset in the trace decodes the pilot.
class PilotNotFound : public Error {
 public:
  explicit PilotNotFound(const std::string& what) : Error("PilotNotFound: " + what) {}
};

}  // namespace node
