#include "whiten/spec.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <vector>

namespace whiten {

std::string to_string(Whitener w) {
  switch (w) {
    case Whitener::None: return "ID";
    case Whitener::BN: return "BN";
    case Whitener::ZCA: return "ZCA";
    case Whitener::LDL: return "LDL";
    case Whitener::PLDLP: return "PLDLP";
  }
  return "?";
}

std::string to_string(Conditioning c) {
  switch (c) {
    case Conditioning::Plain: return "plain";
    case Conditioning::Max: return "max";
    case Conditioning::Entropy: return "entropy";
  }
  return "?";
}

namespace {

std::string fmt_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct Cursor {
  const std::string& s;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos])))
      ++pos;
  }
  bool eat(const char* lit) {
    skip_ws();
    std::size_t n = std::char_traits<char>::length(lit);
    if (s.compare(pos, n, lit) == 0) {
      pos += n;
      return true;
    }
    return false;
  }
  bool done() {
    skip_ws();
    return pos >= s.size();
  }
};

std::vector<double> parse_args(Cursor& c, const std::string& text) {
  std::vector<double> args;
  if (!c.eat("(")) return args;
  for (;;) {
    c.skip_ws();
    const char* begin = c.s.c_str() + c.pos;
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin) {
      throw SpecError("bad spec '" + text + "': expected a number at '" +
                      c.s.substr(c.pos) + "'");
    }
    c.pos += static_cast<std::size_t>(end - begin);
    args.push_back(v);
    if (c.eat(",")) continue;
    if (c.eat(")")) break;
    throw SpecError("bad spec '" + text + "': expected ',' or ')'");
  }
  return args;
}

}  // namespace

void WhiteningSpec::validate() const {
  if (!(eps >= 0.0) || std::isinf(eps)) {
    throw SpecError("spec: eps must be finite and >= 0, got " +
                    fmt_number(eps));
  }
  if (!(k_max > 0.0)) {
    throw SpecError("spec: K must be > 0, got " + fmt_number(k_max));
  }
  if (conditioning != Conditioning::Plain && whitener != Whitener::ZCA) {
    throw SpecError("spec: max/entropy conditioning is only valid with ZCA");
  }
  if (conditioning == Conditioning::Max && !(c > 0.0 && c < 1.0)) {
    throw SpecError("spec: max-mode c must lie in (0,1), got " +
                    fmt_number(c));
  }
  if (standardize_first && whitener != Whitener::ZCA &&
      whitener != Whitener::LDL) {
    throw SpecError("spec: the corr prefix requires a ZCA or LDL whitener");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw SpecError("spec: alpha must lie in [0,1], got " + fmt_number(alpha));
  }
}

std::string WhiteningSpec::str() const {
  std::string base;
  switch (whitener) {
    case Whitener::None: base = "ID"; break;
    case Whitener::BN: base = "BN"; break;
    case Whitener::LDL: base = "LDL"; break;
    case Whitener::PLDLP: base = "PLDLP"; break;
    case Whitener::ZCA:
      base = conditioning == Conditioning::Max     ? "ZCAM"
             : conditioning == Conditioning::Entropy ? "ZCAE"
                                                     : "ZCA";
      break;
  }
  if (standardize_first) base += "corr";
  if (!scale && !rotate) base += "np";

  std::string args;
  switch (whitener) {
    case Whitener::None: break;
    case Whitener::BN:
      if (eps != 0.0) args = "(" + fmt_number(eps) + ")";
      break;
    case Whitener::LDL:
    case Whitener::PLDLP:
      args = "(" + fmt_number(eps) + ")";
      break;
    case Whitener::ZCA:
      args = "(" + fmt_number(eps) + "," + fmt_number(k_max);
      if (conditioning == Conditioning::Max) args += "," + fmt_number(c);
      args += ")";
      break;
  }

  std::string out = base + args;
  if (rotate) {
    out += "->W";
    if (scale) out += "->G";
  }
  return out;
}

WhiteningSpec WhiteningSpec::parse(const std::string& text) {
  Cursor cur{text};
  cur.skip_ws();
  std::size_t start = cur.pos;
  while (cur.pos < text.size() &&
         std::isalnum(static_cast<unsigned char>(text[cur.pos]))) {
    ++cur.pos;
  }
  std::string name = text.substr(start, cur.pos - start);
  if (name.empty()) throw SpecError("bad spec '" + text + "': empty name");

  WhiteningSpec spec;
  bool np = false;
  if (name.size() > 2 && name.compare(name.size() - 2, 2, "np") == 0) {
    np = true;
    name.resize(name.size() - 2);
  }
  if (name.size() > 4 && name.compare(name.size() - 4, 4, "corr") == 0) {
    spec.standardize_first = true;
    name.resize(name.size() - 4);
  }

  if (name == "BN") {
    spec.whitener = Whitener::BN;
  } else if (name == "ZCA") {
    spec.whitener = Whitener::ZCA;
  } else if (name == "ZCAM") {
    spec.whitener = Whitener::ZCA;
    spec.conditioning = Conditioning::Max;
  } else if (name == "ZCAE") {
    spec.whitener = Whitener::ZCA;
    spec.conditioning = Conditioning::Entropy;
  } else if (name == "LDL") {
    spec.whitener = Whitener::LDL;
  } else if (name == "PLDLP") {
    spec.whitener = Whitener::PLDLP;
  } else if (name == "ID") {
    spec.whitener = Whitener::None;
  } else {
    throw SpecError("bad spec '" + text + "': unknown layer name '" + name +
                    "'");
  }

  std::vector<double> args = parse_args(cur, text);
  auto expect_args = [&](std::size_t lo, std::size_t hi) {
    if (args.size() < lo || args.size() > hi) {
      std::ostringstream msg;
      msg << "bad spec '" << text << "': " << name << " takes ";
      if (lo == hi) {
        msg << lo;
      } else {
        msg << lo << ".." << hi;
      }
      msg << " arguments, got " << args.size();
      throw SpecError(msg.str());
    }
  };
  switch (spec.whitener) {
    case Whitener::None:
      expect_args(0, 0);
      break;
    case Whitener::BN:
    case Whitener::LDL:
    case Whitener::PLDLP:
      expect_args(0, 1);
      if (!args.empty()) spec.eps = args[0];
      break;
    case Whitener::ZCA:
      if (spec.conditioning == Conditioning::Max) {
        expect_args(3, 3);
        spec.eps = args[0];
        spec.k_max = args[1];
        spec.c = args[2];
      } else {
        expect_args(0, 2);
        if (args.size() > 0) spec.eps = args[0];
        if (args.size() > 1) spec.k_max = args[1];
      }
      break;
  }

  if (cur.eat("->W")) {
    if (np) {
      throw SpecError("bad spec '" + text + "': np cannot combine with ->W");
    }
    spec.rotate = true;
    spec.scale = false;
    if (cur.eat("->G")) spec.scale = true;
  } else if (np) {
    spec.scale = false;
  }
  if (!cur.done()) {
    throw SpecError("bad spec '" + text + "': trailing characters '" +
                    text.substr(cur.pos) + "'");
  }
  spec.validate();
  return spec;
}

}  // namespace whiten
