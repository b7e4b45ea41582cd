#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>

namespace smartguard {

/// Base class for all errors raised by the pipeline.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class NodeKind {
    ThreadStart,
    Function,
    FileOrAddress,
    ReadList,
    WriteList,
    Process,
    Socket,
    Database,
};

constexpr int kNumNodeKinds = 8;

enum class RelationKind {
    READ,
    WRITE,
    LINK,
    EXECUTE,
    MODIFY_FILE_ATTRIBUTES,
    CHECK_ATTRIBUTE,
    CONNECT,
    CREATE,
    DELETE,
    LOAD,
};

constexpr int kNumRelations = 10;

const char* to_string(NodeKind kind);
const char* to_string(RelationKind rel);

std::optional<NodeKind> node_kind_from_string(const std::string& s);
std::optional<RelationKind> relation_from_string(const std::string& s);

/// 64-bit FNV-1a; used for token hashing and artifact content hashes.
std::uint64_t fnv1a(const std::string& data, std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace smartguard
