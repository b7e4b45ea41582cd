#include "smartguard/ingest.hpp"

#include <algorithm>
#include <sstream>

#include "json.hpp"

namespace smartguard {

using nlohmann::json;

namespace {

const json& require_field(const json& obj, const char* name) {
    auto it = obj.find(name);
    if (it == obj.end()) throw MissingField(name);
    return *it;
}

EntityRef parse_entity(const json& obj, const char* field) {
    const json& ent = require_field(obj, field);
    if (!ent.is_object()) throw MalformedLine(std::string(field) + " is not an object");
    const json& kind = require_field(ent, "kind");
    const json& name = require_field(ent, "name");
    if (!kind.is_string() || !name.is_string())
        throw MalformedLine(std::string(field) + " fields must be strings");
    auto k = node_kind_from_string(kind.get<std::string>());
    if (!k) throw UnknownKind(kind.get<std::string>());
    std::string n = name.get<std::string>();
    if (n.empty()) throw MalformedLine(std::string(field) + " name is empty");
    return EntityRef{classify_entity(n, *k), n};
}

}  // namespace

AuditRecord parse_record(const std::string& line) {
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object())
        throw MalformedLine("not a JSON object: " + line.substr(0, 80));

    AuditRecord rec;
    const json& ts = require_field(obj, "ts");
    if (!ts.is_number_integer()) throw MalformedLine("ts is not an integer");
    rec.ts = ts.get<long long>();
    if (rec.ts < 0) throw MalformedLine("ts is negative");

    const json& pid = require_field(obj, "pid");
    const json& tid = require_field(obj, "tid");
    if (!pid.is_string() || !tid.is_string())
        throw MalformedLine("pid/tid must be strings");
    rec.pid = pid.get<std::string>();
    rec.tid = tid.get<std::string>();
    if (rec.pid.empty() || rec.tid.empty())
        throw MalformedLine("pid/tid must be non-empty");

    rec.head = parse_entity(obj, "head");
    rec.tail = parse_entity(obj, "tail");

    const json& rel = require_field(obj, "relation");
    if (!rel.is_string()) throw MalformedLine("relation is not a string");
    auto r = relation_from_string(rel.get<std::string>());
    if (!r) throw UnknownRelation(rel.get<std::string>());
    rec.relation = *r;

    if (rec.head == rec.tail)
        throw MalformedLine("self-loop record: " + rec.head.name);
    return rec;
}

std::string serialize_record(const AuditRecord& rec) {
    json obj;
    obj["ts"] = rec.ts;
    obj["pid"] = rec.pid;
    obj["tid"] = rec.tid;
    obj["head"] = {{"kind", to_string(rec.head.kind)}, {"name", rec.head.name}};
    obj["relation"] = to_string(rec.relation);
    obj["tail"] = {{"kind", to_string(rec.tail.kind)}, {"name", rec.tail.name}};
    return obj.dump();
}

NodeKind classify_entity(const std::string& name,
                         std::optional<NodeKind> declared_kind) {
    if (declared_kind) return *declared_kind;
    if (name.size() >= 2 && name.compare(name.size() - 2, 2, "()") == 0)
        return NodeKind::Function;
    if (name == "readlist") return NodeKind::ReadList;
    if (name == "writelist") return NodeKind::WriteList;
    if (name.size() >= 3 && name.compare(name.size() - 3, 3, ".db") == 0)
        return NodeKind::Database;
    return NodeKind::FileOrAddress;
}

Session load_session_from_records(std::vector<AuditRecord> records) {
    std::stable_sort(records.begin(), records.end(),
                     [](const AuditRecord& a, const AuditRecord& b) { return a.ts < b.ts; });
    Session s;
    s.records.reserve(records.size());
    for (auto& rec : records) {
        if (std::find(s.records.begin(), s.records.end(), rec) == s.records.end())
            s.records.push_back(std::move(rec));
    }
    for (int i = 0; i < static_cast<int>(s.records.size()); ++i) {
        const std::string& tid = s.records[i].tid;
        auto [it, inserted] = s.by_tid.try_emplace(tid);
        if (inserted || it->second.empty()) {
            if (std::find(s.thread_order.begin(), s.thread_order.end(), tid) ==
                s.thread_order.end())
                s.thread_order.push_back(tid);
        }
        it->second.push_back(i);
    }
    return s;
}

Session load_session(std::istream& in) {
    std::vector<AuditRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            records.push_back(parse_record(line));
        } catch (const Error& e) {
            throw ParseAtLine(line_no, e.what());
        }
    }
    return load_session_from_records(std::move(records));
}

std::string serialize_session(const Session& s) {
    std::ostringstream out;
    for (const auto& rec : s.records) out << serialize_record(rec) << "\n";
    return out.str();
}

}  // namespace smartguard
