#include "smartguard/types.hpp"

#include <cstdint>

namespace smartguard {

namespace {

constexpr std::array<const char*, kNumNodeKinds> kNodeKindNames = {
    "ThreadStart", "Function", "FileOrAddress", "ReadList",
    "WriteList",   "Process",  "Socket",        "Database",
};

constexpr std::array<const char*, kNumRelations> kRelationNames = {
    "READ",    "WRITE",   "LINK",   "EXECUTE", "MODIFY_FILE_ATTRIBUTES",
    "CHECK_ATTRIBUTE", "CONNECT", "CREATE", "DELETE",  "LOAD",
};

}  // namespace

const char* to_string(NodeKind kind) {
    return kNodeKindNames[static_cast<int>(kind)];
}

const char* to_string(RelationKind rel) {
    return kRelationNames[static_cast<int>(rel)];
}

std::optional<NodeKind> node_kind_from_string(const std::string& s) {
    for (int i = 0; i < kNumNodeKinds; ++i) {
        if (s == kNodeKindNames[i]) return static_cast<NodeKind>(i);
    }
    return std::nullopt;
}

std::optional<RelationKind> relation_from_string(const std::string& s) {
    for (int i = 0; i < kNumRelations; ++i) {
        if (s == kRelationNames[i]) return static_cast<RelationKind>(i);
    }
    return std::nullopt;
}

std::uint64_t fnv1a(const std::string& data, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace smartguard
