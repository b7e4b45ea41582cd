#pragma once

#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "smartguard/types.hpp"

namespace smartguard {

struct MalformedLine : Error {
    using Error::Error;
};
struct MissingField : Error {
    explicit MissingField(const std::string& name)
        : Error("missing field: " + name), field(name) {}
    std::string field;
};
struct UnknownRelation : Error {
    explicit UnknownRelation(const std::string& verb)
        : Error("unknown relation: " + verb), verb(verb) {}
    std::string verb;
};
struct UnknownKind : Error {
    explicit UnknownKind(const std::string& kind)
        : Error("unknown node kind: " + kind), kind(kind) {}
    std::string kind;
};
struct ParseAtLine : Error {
    ParseAtLine(int line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line(line) {}
    int line;
};

struct EntityRef {
    NodeKind kind;
    std::string name;

    bool operator==(const EntityRef&) const = default;
    auto operator<=>(const EntityRef&) const = default;
};

/// One normalized system-call event.
struct AuditRecord {
    long long ts = 0;  // nanoseconds since epoch
    std::string pid;
    std::string tid;
    EntityRef head;
    RelationKind relation = RelationKind::READ;
    EntityRef tail;

    bool operator==(const AuditRecord&) const = default;
};

/// Parses one line of the JSONL wire format. Self-loop records
/// (head == tail) are rejected as malformed.
AuditRecord parse_record(const std::string& line);

std::string serialize_record(const AuditRecord& rec);

/// Kind resolution for an entity name. A declared kind always wins;
/// otherwise the name shape decides: trailing "()" is a Function,
/// ".db" suffix a Database, the literals "readlist"/"writelist" map
/// to the list kinds, anything else is a file or address.
NodeKind classify_entity(const std::string& name,
                         std::optional<NodeKind> declared_kind = std::nullopt);

/// A parsed session: records globally sorted by (ts, input order),
/// byte-identical duplicates removed, with per-thread views.
struct Session {
    std::vector<AuditRecord> records;
    std::vector<std::string> thread_order;              // first-seen order
    std::map<std::string, std::vector<int>> by_tid;     // indices into records
};

Session load_session(std::istream& in);
Session load_session_from_records(std::vector<AuditRecord> records);

std::string serialize_session(const Session& s);

}  // namespace smartguard
