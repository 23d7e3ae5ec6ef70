#pragma once

#include <stdexcept>
#include <string>

namespace polytrack {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define POLYTRACK_ERROR_TYPE(Name)                                        \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& msg = #Name) : Error(msg) {}     \
    };

POLYTRACK_ERROR_TYPE(EmptyMask)
POLYTRACK_ERROR_TYPE(DegenerateComponent)
POLYTRACK_ERROR_TYPE(DegenerateContour)
POLYTRACK_ERROR_TYPE(TooFewPoints)
POLYTRACK_ERROR_TYPE(SingularTransform)
POLYTRACK_ERROR_TYPE(DegenerateBox)
POLYTRACK_ERROR_TYPE(SizeMismatch)
POLYTRACK_ERROR_TYPE(EmptySet)
POLYTRACK_ERROR_TYPE(ShapeMismatch)
POLYTRACK_ERROR_TYPE(NoVisiblePoints)
POLYTRACK_ERROR_TYPE(TooFewFrames)
POLYTRACK_ERROR_TYPE(NoControls)
POLYTRACK_ERROR_TYPE(CanvasTooSmall)
POLYTRACK_ERROR_TYPE(EmptyFrames)
POLYTRACK_ERROR_TYPE(BadInit)
POLYTRACK_ERROR_TYPE(ParseError)
POLYTRACK_ERROR_TYPE(SchemaError)
POLYTRACK_ERROR_TYPE(UnsupportedFormat)
POLYTRACK_ERROR_TYPE(IoError)

#undef POLYTRACK_ERROR_TYPE

}  // namespace polytrack
