#pragma once

#include <compare>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mdslite/clock.hpp"

namespace mdslite {

struct NameComponent {
    std::string attr;
    std::string value;

    bool operator==(const NameComponent&) const = default;
};

// Hierarchical entry name, most-specific component first, e.g.
// "mds-host-hn=hostA, mds-vo-name=local". Always holds at least one
// component. Comparison is byte-exact and case-sensitive.
class EntryName {
public:
    explicit EntryName(std::vector<NameComponent> components);

    static EntryName parse(std::string_view text);

    const std::vector<NameComponent>& components() const { return components_; }
    std::size_t depth() const { return components_.size(); }

    // Canonical text form; parse(str()) == *this.
    const std::string& str() const { return text_; }

    // True when this name equals `ancestor` or lies beneath it.
    bool is_under(const EntryName& ancestor) const;
    std::optional<EntryName> parent() const;
    EntryName child(NameComponent rdn) const;

    bool operator==(const EntryName& other) const { return text_ == other.text_; }
    std::strong_ordering operator<=>(const EntryName& other) const {
        return text_.compare(other.text_) <=> 0;
    }

private:
    std::vector<NameComponent> components_;
    std::string text_;
};

EntryName parse_name(std::string_view text);
std::string format_name(const EntryName& name);

// Attribute names are ASCII letters, digits, '-' and '.', starting with a
// letter or digit.
bool is_attribute_name(std::string_view s);

using Attributes = std::map<std::string, std::vector<std::string>>;

// Reserved LDIF line that carries Entry::timestamp in-band.
inline constexpr std::string_view kTimestampAttr = "modifytimestamp";

struct Entry {
    EntryName name;
    Attributes attributes;
    WallTime timestamp{};

    bool operator==(const Entry&) const = default;
};

// Throws MalformedEntry if the entry violates its invariants (missing
// objectclass, empty value list, newline in a value, reserved attribute).
void validate_entry(const Entry& entry);

// LDIF-like text. One "dn:" line, a "modifytimestamp:" line, then one
// "attr: value" line per value; entries are separated by exactly one blank
// line.
std::string serialize_entry(const Entry& entry);
std::string serialize_entries(const std::vector<Entry>& entries);
std::string serialize_entries(const std::vector<const Entry*>& entries);
std::vector<Entry> parse_entries(std::string_view text);
std::size_t serialized_size(const Entry& entry);

class Filter {
public:
    enum class Kind { Presence, Equality, And, Or };

    static Filter presence(std::string attr);
    static Filter equality(std::string attr, std::string value);
    static Filter all_of(std::vector<Filter> children);
    static Filter any_of(std::vector<Filter> children);

    // LDAP-style text: (a=*), (a=v), (&(..)(..)), (|(..)(..)). In values,
    // '(', ')', '*' and '\' are escaped with a backslash.
    static Filter parse(std::string_view text);
    std::string str() const;

    Kind kind() const { return kind_; }
    const std::string& attr() const { return attr_; }
    const std::string& value() const { return value_; }
    const std::vector<Filter>& children() const { return children_; }

    bool operator==(const Filter&) const = default;

private:
    Filter(Kind kind, std::string attr, std::string value, std::vector<Filter> children)
        : kind_(kind), attr_(std::move(attr)), value_(std::move(value)),
          children_(std::move(children)) {}

    Kind kind_;
    std::string attr_;
    std::string value_;
    std::vector<Filter> children_;
};

bool eval_filter(const Entry& entry, const Filter& filter);

enum class Scope { Base, OneLevel, Subtree };

std::string_view scope_name(Scope scope);
Scope parse_scope(std::string_view text);

// Whether `name` falls in the scope rooted at `base`.
bool in_scope(const EntryName& name, const EntryName& base, Scope scope);

// Whether any name under `suffix` (inclusive) can fall in the scope of `base`.
bool scope_intersects(const EntryName& suffix, const EntryName& base, Scope scope);

struct SearchRequest {
    EntryName base;
    Scope scope = Scope::Subtree;
    Filter filter = Filter::presence("objectclass");
    // nullopt means all attributes.
    std::optional<std::vector<std::string>> attributes;
    std::string query_id;
};

// Copies `entry` keeping only the requested attributes (objectclass is not
// special-cased). Name and timestamp are always kept.
Entry project(const Entry& entry, const std::optional<std::vector<std::string>>& attributes);

// Immutable in-memory index over a set of entries under one suffix. The node
// set is the entries plus every ancestor between them and the suffix, so
// intermediate names without an entry are still traversable.
class SearchIndex {
public:
    static SearchIndex build(std::vector<Entry> entries, EntryName suffix);

    const EntryName& suffix() const { return suffix_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    // All entries in lexicographic name order.
    const std::vector<Entry>& entries() const { return entries_; }

    const Entry* find(const EntryName& name) const;
    bool has_node(const EntryName& name) const;

    // Matching entries in lexicographic name order. `base` may lie under the
    // suffix or above it; bases outside either relation yield nothing.
    // Throws NoSuchBase when scope is base/one-level and base is neither a
    // node of this index nor an ancestor of its suffix.
    std::vector<const Entry*> search_refs(const EntryName& base, Scope scope,
                                          const Filter& filter) const;

private:
    SearchIndex(EntryName suffix) : suffix_(std::move(suffix)) {}

    void collect_subtree(const std::string& node, const Filter& filter,
                         std::vector<std::size_t>& out) const;

    EntryName suffix_;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> by_name_;
    std::unordered_map<std::string, std::vector<std::string>> children_;
};

SearchIndex build_index(std::vector<Entry> entries, const EntryName& suffix);

// Copies of the matching entries with projection applied.
std::vector<Entry> search(const SearchIndex& index, const SearchRequest& request);

} // namespace mdslite
