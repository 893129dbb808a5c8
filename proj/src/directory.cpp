#include "mdslite/directory.hpp"

#include <algorithm>
#include <unordered_set>

#include "mdslite/error.hpp"

namespace mdslite {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t'; }

bool is_control(char c) { return static_cast<unsigned char>(c) < 0x20 || c == 0x7f; }

bool needs_escape(char c) { return c == ',' || c == '=' || c == '\\'; }

std::string escape_value(const std::string& v) {
    std::string out;
    out.reserve(v.size() + 2);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const char c = v[i];
        const bool edge_space = c == ' ' && (i == 0 || i + 1 == v.size());
        if (needs_escape(c) || edge_space) {
            out.push_back('\\');
        }
        out.push_back(c);
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_space(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

[[noreturn]] void bad_name(std::string_view text, const char* why) {
    throw Error(Errc::MalformedName, std::string(why) + " in '" + std::string(text) + "'");
}

// Unescapes one component value, trimming unescaped surrounding whitespace.
std::string unescape_value(std::string_view raw, std::string_view whole) {
    std::string out;
    std::vector<bool> escaped;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        char c = raw[i];
        if (c == '\\') {
            if (i + 1 >= raw.size()) {
                bad_name(whole, "dangling escape");
            }
            c = raw[++i];
            if (!needs_escape(c) && c != ' ') {
                bad_name(whole, "bad escape");
            }
            out.push_back(c);
            escaped.push_back(true);
            continue;
        }
        if (c == '=') {
            bad_name(whole, "unescaped '='");
        }
        out.push_back(c);
        escaped.push_back(false);
    }
    std::size_t begin = 0;
    std::size_t end = out.size();
    while (begin < end && !escaped[begin] && is_space(out[begin])) {
        ++begin;
    }
    while (end > begin && !escaped[end - 1] && is_space(out[end - 1])) {
        --end;
    }
    return out.substr(begin, end - begin);
}

void check_component(const NameComponent& c) {
    if (!is_attribute_name(c.attr)) {
        throw Error(Errc::MalformedName, "bad attribute name '" + c.attr + "'");
    }
    if (c.value.empty()) {
        throw Error(Errc::MalformedName, "empty value for '" + c.attr + "'");
    }
    if (std::any_of(c.value.begin(), c.value.end(), is_control)) {
        throw Error(Errc::MalformedName, "control character in value of '" + c.attr + "'");
    }
}

} // namespace

bool is_attribute_name(std::string_view s) {
    if (s.empty()) {
        return false;
    }
    auto ok = [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
               c == '-' || c == '.';
    };
    return std::all_of(s.begin(), s.end(), ok) && s.front() != '-' && s.front() != '.';
}

EntryName::EntryName(std::vector<NameComponent> components) : components_(std::move(components)) {
    if (components_.empty()) {
        throw Error(Errc::MalformedName, "name has no components");
    }
    for (std::size_t i = 0; i < components_.size(); ++i) {
        check_component(components_[i]);
        if (i) {
            text_ += ", ";
        }
        text_ += components_[i].attr;
        text_ += '=';
        text_ += escape_value(components_[i].value);
    }
}

EntryName EntryName::parse(std::string_view text) {
    if (trim(text).empty()) {
        bad_name(text, "empty name");
    }
    std::vector<NameComponent> comps;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i < text.size() && text[i] == '\\') {
            ++i;
            continue;
        }
        if (i < text.size() && is_control(text[i])) {
            bad_name(text, "control character");
        }
        if (i == text.size() || text[i] == ',') {
            std::string_view part = text.substr(start, i - start);
            std::size_t eq = std::string_view::npos;
            for (std::size_t j = 0; j < part.size(); ++j) {
                if (part[j] == '\\') {
                    ++j;
                } else if (part[j] == '=') {
                    eq = j;
                    break;
                }
            }
            if (eq == std::string_view::npos) {
                bad_name(text, "component without '='");
            }
            NameComponent c;
            c.attr = std::string(trim(part.substr(0, eq)));
            c.value = unescape_value(part.substr(eq + 1), text);
            if (c.attr.empty()) {
                bad_name(text, "empty attribute");
            }
            if (c.value.empty()) {
                bad_name(text, "empty value");
            }
            comps.push_back(std::move(c));
            start = i + 1;
        }
    }
    return EntryName(std::move(comps));
}

bool EntryName::is_under(const EntryName& ancestor) const {
    const auto& a = ancestor.components_;
    if (a.size() > components_.size()) {
        return false;
    }
    return std::equal(a.rbegin(), a.rend(), components_.rbegin());
}

std::optional<EntryName> EntryName::parent() const {
    if (components_.size() == 1) {
        return std::nullopt;
    }
    return EntryName(std::vector<NameComponent>(components_.begin() + 1, components_.end()));
}

EntryName EntryName::child(NameComponent rdn) const {
    std::vector<NameComponent> comps;
    comps.reserve(components_.size() + 1);
    comps.push_back(std::move(rdn));
    comps.insert(comps.end(), components_.begin(), components_.end());
    return EntryName(std::move(comps));
}

EntryName parse_name(std::string_view text) { return EntryName::parse(text); }

std::string format_name(const EntryName& name) { return name.str(); }

// ---------------------------------------------------------------------------
// Entries and LDIF

void validate_entry(const Entry& e) {
    auto oc = e.attributes.find("objectclass");
    if (oc == e.attributes.end() || oc->second.empty()) {
        throw Error(Errc::MalformedEntry, e.name.str() + ": missing objectclass");
    }
    for (const auto& [attr, values] : e.attributes) {
        if (!is_attribute_name(attr) || attr == "dn" || attr == kTimestampAttr) {
            throw Error(Errc::MalformedEntry, e.name.str() + ": bad attribute '" + attr + "'");
        }
        if (values.empty()) {
            throw Error(Errc::MalformedEntry, e.name.str() + ": no values for '" + attr + "'");
        }
        for (const auto& v : values) {
            if (v.find('\n') != std::string::npos || v.find('\r') != std::string::npos) {
                throw Error(Errc::MalformedEntry, e.name.str() + ": newline in '" + attr + "'");
            }
        }
    }
}

std::string serialize_entry(const Entry& e) {
    std::string out;
    out.reserve(256);
    out += "dn: ";
    out += e.name.str();
    out += '\n';
    out += kTimestampAttr;
    out += ": ";
    out += format_timestamp(e.timestamp);
    out += '\n';
    for (const auto& [attr, values] : e.attributes) {
        for (const auto& v : values) {
            out += attr;
            out += ": ";
            out += v;
            out += '\n';
        }
    }
    return out;
}

std::size_t serialized_size(const Entry& e) { return serialize_entry(e).size(); }

std::string serialize_entries(const std::vector<const Entry*>& entries) {
    std::string out;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (i) {
            out += '\n';
        }
        out += serialize_entry(*entries[i]);
    }
    return out;
}

std::string serialize_entries(const std::vector<Entry>& entries) {
    std::vector<const Entry*> refs;
    refs.reserve(entries.size());
    for (const auto& e : entries) {
        refs.push_back(&e);
    }
    return serialize_entries(refs);
}

std::vector<Entry> parse_entries(std::string_view text) {
    std::vector<Entry> out;
    std::optional<EntryName> name;
    std::optional<WallTime> ts;
    Attributes attrs;
    std::size_t line_no = 0;

    auto bad = [&](const std::string& why) -> Error {
        return Error(Errc::MalformedEntry, "line " + std::to_string(line_no) + ": " + why);
    };
    auto finish = [&] {
        if (!name) {
            throw bad("blank line outside an entry");
        }
        if (!ts) {
            throw bad("entry without timestamp");
        }
        Entry e{std::move(*name), std::move(attrs), *ts};
        validate_entry(e);
        out.push_back(std::move(e));
        name.reset();
        ts.reset();
        attrs.clear();
    };

    if (text.empty()) {
        return out;
    }
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            throw bad("unterminated line");
        }
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (line.empty()) {
            finish();
            continue;
        }
        std::size_t sep = line.find(": ");
        if (sep == std::string_view::npos) {
            throw bad("missing ': '");
        }
        std::string_view key = line.substr(0, sep);
        std::string_view value = line.substr(sep + 2);
        if (!name) {
            if (key != "dn") {
                throw bad("entry must start with dn");
            }
            try {
                name = EntryName::parse(value);
            } catch (const Error& err) {
                throw bad(err.what());
            }
        } else if (key == kTimestampAttr) {
            if (ts) {
                throw bad("duplicate timestamp");
            }
            ts = parse_timestamp(value);
            if (!ts) {
                throw bad("bad timestamp");
            }
        } else {
            attrs[std::string(key)].emplace_back(value);
        }
    }
    finish();
    return out;
}

// ---------------------------------------------------------------------------
// Filters

Filter Filter::presence(std::string attr) { return Filter(Kind::Presence, std::move(attr), {}, {}); }

Filter Filter::equality(std::string attr, std::string value) {
    return Filter(Kind::Equality, std::move(attr), std::move(value), {});
}

Filter Filter::all_of(std::vector<Filter> children) {
    if (children.empty()) {
        throw Error(Errc::MalformedFilter, "empty AND");
    }
    return Filter(Kind::And, {}, {}, std::move(children));
}

Filter Filter::any_of(std::vector<Filter> children) {
    if (children.empty()) {
        throw Error(Errc::MalformedFilter, "empty OR");
    }
    return Filter(Kind::Or, {}, {}, std::move(children));
}

namespace {

class FilterParser {
public:
    explicit FilterParser(std::string_view text) : text_(text) {}

    Filter parse_all() {
        Filter f = parse_one();
        if (pos_ != text_.size()) {
            fail("trailing characters");
        }
        return f;
    }

private:
    [[noreturn]] void fail(const char* why) const {
        throw Error(Errc::MalformedFilter,
                    std::string(why) + " at offset " + std::to_string(pos_) + " in '" +
                        std::string(text_) + "'");
    }

    void expect(char c) {
        if (pos_ >= text_.size() || text_[pos_] != c) {
            fail("unexpected character");
        }
        ++pos_;
    }

    Filter parse_one() {
        expect('(');
        if (pos_ >= text_.size()) {
            fail("truncated filter");
        }
        if (text_[pos_] == '&' || text_[pos_] == '|') {
            const bool is_and = text_[pos_] == '&';
            ++pos_;
            std::vector<Filter> kids;
            while (pos_ < text_.size() && text_[pos_] == '(') {
                kids.push_back(parse_one());
            }
            expect(')');
            if (kids.empty()) {
                fail("empty composite");
            }
            return is_and ? Filter::all_of(std::move(kids)) : Filter::any_of(std::move(kids));
        }
        std::size_t eq = text_.find('=', pos_);
        if (eq == std::string_view::npos) {
            fail("missing '='");
        }
        std::string attr(text_.substr(pos_, eq - pos_));
        if (!is_attribute_name(attr)) {
            fail("bad attribute name");
        }
        pos_ = eq + 1;
        if (text_.substr(pos_, 2) == "*)") {
            pos_ += 2;
            return Filter::presence(std::move(attr));
        }
        std::string value;
        while (true) {
            if (pos_ >= text_.size()) {
                fail("unterminated value");
            }
            char c = text_[pos_];
            if (c == ')') {
                ++pos_;
                break;
            }
            if (c == '(' || c == '*') {
                fail("unescaped special character");
            }
            if (c == '\\') {
                if (pos_ + 1 >= text_.size()) {
                    fail("dangling escape");
                }
                c = text_[++pos_];
                if (c != '(' && c != ')' && c != '*' && c != '\\') {
                    fail("bad escape");
                }
            }
            value.push_back(c);
            ++pos_;
        }
        return Filter::equality(std::move(attr), std::move(value));
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

void format_filter(const Filter& f, std::string& out) {
    out += '(';
    switch (f.kind()) {
    case Filter::Kind::Presence:
        out += f.attr();
        out += "=*";
        break;
    case Filter::Kind::Equality:
        out += f.attr();
        out += '=';
        for (char c : f.value()) {
            if (c == '(' || c == ')' || c == '*' || c == '\\') {
                out += '\\';
            }
            out += c;
        }
        break;
    case Filter::Kind::And:
    case Filter::Kind::Or:
        out += f.kind() == Filter::Kind::And ? '&' : '|';
        for (const auto& c : f.children()) {
            format_filter(c, out);
        }
        break;
    }
    out += ')';
}

} // namespace

Filter Filter::parse(std::string_view text) { return FilterParser(text).parse_all(); }

std::string Filter::str() const {
    std::string out;
    format_filter(*this, out);
    return out;
}

bool eval_filter(const Entry& entry, const Filter& f) {
    switch (f.kind()) {
    case Filter::Kind::Presence:
        return entry.attributes.count(f.attr()) > 0;
    case Filter::Kind::Equality: {
        auto it = entry.attributes.find(f.attr());
        if (it == entry.attributes.end()) {
            return false;
        }
        return std::find(it->second.begin(), it->second.end(), f.value()) != it->second.end();
    }
    case Filter::Kind::And:
        return std::all_of(f.children().begin(), f.children().end(),
                           [&](const Filter& c) { return eval_filter(entry, c); });
    case Filter::Kind::Or:
        return std::any_of(f.children().begin(), f.children().end(),
                           [&](const Filter& c) { return eval_filter(entry, c); });
    }
    return false;
}

// ---------------------------------------------------------------------------
// Scopes

std::string_view scope_name(Scope s) {
    switch (s) {
    case Scope::Base:
        return "base";
    case Scope::OneLevel:
        return "one";
    case Scope::Subtree:
        return "sub";
    }
    return "sub";
}

Scope parse_scope(std::string_view text) {
    if (text == "base") {
        return Scope::Base;
    }
    if (text == "one" || text == "onelevel") {
        return Scope::OneLevel;
    }
    if (text == "sub" || text == "subtree") {
        return Scope::Subtree;
    }
    throw Error(Errc::MalformedMessage, "unknown scope '" + std::string(text) + "'");
}

bool in_scope(const EntryName& name, const EntryName& base, Scope scope) {
    switch (scope) {
    case Scope::Base:
        return name == base;
    case Scope::OneLevel:
        return name.depth() == base.depth() + 1 && name.is_under(base);
    case Scope::Subtree:
        return name.is_under(base);
    }
    return false;
}

bool scope_intersects(const EntryName& suffix, const EntryName& base, Scope scope) {
    switch (scope) {
    case Scope::Base:
        return base.is_under(suffix);
    case Scope::OneLevel:
        return base.is_under(suffix) ||
               (suffix.depth() == base.depth() + 1 && suffix.is_under(base));
    case Scope::Subtree:
        return base.is_under(suffix) || suffix.is_under(base);
    }
    return false;
}

Entry project(const Entry& entry, const std::optional<std::vector<std::string>>& attributes) {
    if (!attributes) {
        return entry;
    }
    Entry out{entry.name, {}, entry.timestamp};
    for (const auto& a : *attributes) {
        auto it = entry.attributes.find(a);
        if (it != entry.attributes.end()) {
            out.attributes.insert(*it);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Index

SearchIndex SearchIndex::build(std::vector<Entry> entries, EntryName suffix) {
    SearchIndex index(std::move(suffix));
    const EntryName& root = index.suffix_;
    for (const auto& e : entries) {
        if (!e.name.is_under(root)) {
            throw Error(Errc::ForeignEntry, e.name.str() + " is outside " + root.str());
        }
        validate_entry(e);
    }
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.name.str() < b.name.str(); });
    for (std::size_t i = 1; i < entries.size(); ++i) {
        if (entries[i].name == entries[i - 1].name) {
            throw Error(Errc::DuplicateName, entries[i].name.str());
        }
    }
    index.entries_ = std::move(entries);
    index.by_name_.reserve(index.entries_.size());
    std::unordered_set<std::string> linked;
    for (std::size_t i = 0; i < index.entries_.size(); ++i) {
        const EntryName& name = index.entries_[i].name;
        index.by_name_.emplace(name.str(), i);
        // Link the name and its missing ancestors up to the suffix.
        EntryName node = name;
        while (!(node == root) && !linked.count(node.str())) {
            linked.insert(node.str());
            EntryName up = *node.parent();
            index.children_[up.str()].push_back(node.str());
            node = std::move(up);
        }
    }
    return index;
}

SearchIndex build_index(std::vector<Entry> entries, const EntryName& suffix) {
    return SearchIndex::build(std::move(entries), suffix);
}

const Entry* SearchIndex::find(const EntryName& name) const {
    auto it = by_name_.find(name.str());
    return it == by_name_.end() ? nullptr : &entries_[it->second];
}

bool SearchIndex::has_node(const EntryName& name) const {
    return name == suffix_ || by_name_.count(name.str()) || children_.count(name.str());
}

void SearchIndex::collect_subtree(const std::string& start, const Filter& filter,
                                  std::vector<std::size_t>& out) const {
    std::vector<const std::string*> stack{&start};
    while (!stack.empty()) {
        const std::string* node = stack.back();
        stack.pop_back();
        if (auto it = by_name_.find(*node); it != by_name_.end()) {
            if (eval_filter(entries_[it->second], filter)) {
                out.push_back(it->second);
            }
        }
        if (auto it = children_.find(*node); it != children_.end()) {
            for (const auto& c : it->second) {
                stack.push_back(&c);
            }
        }
    }
}

std::vector<const Entry*> SearchIndex::search_refs(const EntryName& base, Scope scope,
                                                   const Filter& filter) const {
    std::vector<std::size_t> hits;
    auto match_at = [&](const std::string& node) {
        if (auto it = by_name_.find(node); it != by_name_.end()) {
            if (eval_filter(entries_[it->second], filter)) {
                hits.push_back(it->second);
            }
        }
    };

    if (base.is_under(suffix_)) {
        if (!has_node(base)) {
            if (scope == Scope::Subtree) {
                return {};
            }
            throw Error(Errc::NoSuchBase, base.str());
        }
        switch (scope) {
        case Scope::Base:
            match_at(base.str());
            break;
        case Scope::OneLevel:
            if (auto it = children_.find(base.str()); it != children_.end()) {
                for (const auto& c : it->second) {
                    match_at(c);
                }
            }
            break;
        case Scope::Subtree:
            collect_subtree(base.str(), filter, hits);
            break;
        }
    } else if (suffix_.is_under(base)) {
        if (scope == Scope::Subtree) {
            collect_subtree(suffix_.str(), filter, hits);
        } else if (scope == Scope::OneLevel && suffix_.depth() == base.depth() + 1) {
            match_at(suffix_.str());
        }
    } else if (scope != Scope::Subtree) {
        throw Error(Errc::NoSuchBase, base.str());
    }

    std::sort(hits.begin(), hits.end());
    std::vector<const Entry*> out;
    out.reserve(hits.size());
    for (auto i : hits) {
        out.push_back(&entries_[i]);
    }
    return out;
}

std::vector<Entry> search(const SearchIndex& index, const SearchRequest& request) {
    std::vector<Entry> out;
    for (const Entry* e : index.search_refs(request.base, request.scope, request.filter)) {
        out.push_back(project(*e, request.attributes));
    }
    return out;
}

} // namespace mdslite
