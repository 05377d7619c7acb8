#pragma once

#include <stdexcept>
#include <string>

namespace povgen {

// Root of every error this library raises. Each subclass is a distinct,
// catchable kind; callers that only care about "something went wrong" catch
// this.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define POVGEN_DEFINE_ERROR(Name, Base)      \
    class Name : public Base {               \
    public:                                  \
        using Base::Base;                    \
    }

// manifest / workspace
POVGEN_DEFINE_ERROR(ParseError, Error);
POVGEN_DEFINE_ERROR(ValidationError, Error);
POVGEN_DEFINE_ERROR(CheckoutError, Error);
POVGEN_DEFINE_ERROR(IoError, Error);

// model gateway
POVGEN_DEFINE_ERROR(TransportError, Error);
POVGEN_DEFINE_ERROR(ConfigError, Error);

// structured output
POVGEN_DEFINE_ERROR(StructuredOutputError, Error);
POVGEN_DEFINE_ERROR(UnbalancedTag, StructuredOutputError);
POVGEN_DEFINE_ERROR(MissingTag, StructuredOutputError);
POVGEN_DEFINE_ERROR(MalformedRecord, StructuredOutputError);
POVGEN_DEFINE_ERROR(RoleOrderError, StructuredOutputError);
POVGEN_DEFINE_ERROR(EmptyList, StructuredOutputError);
POVGEN_DEFINE_ERROR(MalformedToolCall, StructuredOutputError);

// sandbox
POVGEN_DEFINE_ERROR(ToolError, Error);
POVGEN_DEFINE_ERROR(PathEscape, ToolError);
POVGEN_DEFINE_ERROR(NotFound, ToolError);
POVGEN_DEFINE_ERROR(BadRange, ToolError);
POVGEN_DEFINE_ERROR(BadPattern, ToolError);
POVGEN_DEFINE_ERROR(DockerfileGuardViolation, ToolError);
POVGEN_DEFINE_ERROR(EngineUnavailable, Error);

// workflow / evaluation / cli
POVGEN_DEFINE_ERROR(UnboundSlot, Error);
POVGEN_DEFINE_ERROR(NoTargetsFound, Error);
POVGEN_DEFINE_ERROR(MissingPriorPayload, Error);

#undef POVGEN_DEFINE_ERROR

} // namespace povgen
