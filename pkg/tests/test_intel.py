import ipaddress
import random

from poststack.emlparse import Address, Link, normalize_url
from poststack.intel import (
    Blocklist,
    check_sender,
    check_url,
    cidr_contains,
    load_blocklist,
    parse_ipv4,
)


def make_link(url: str) -> Link:
    norm = normalize_url(url)
    return Link(url=norm[0], scheme=norm[1], host=norm[2], origin="plain_text")


def test_load_blocklist_kinds(tmp_path):
    f = tmp_path / "bl.txt"
    f.write_text(
        "# comment\n"
        "\n"
        "domain evil.test\n"
        "cidr 10.0.0.0/8\n"
        "sender mallory@bad.test\n"
    )
    bl = load_blocklist(f)
    assert "evil.test" in bl.domains
    assert len(bl.cidrs) == 1
    assert "mallory@bad.test" in bl.senders
    assert bl.malformed_count == 0


def test_invalid_cidr_prefix_skipped(tmp_path):
    f = tmp_path / "bl.txt"
    f.write_text("cidr 10.0.0.0/33\n")
    bl = load_blocklist(f)
    assert bl.cidrs == []
    assert bl.malformed_count == 1


def test_domain_suffix_hit():
    bl = Blocklist(domains={"evil.test": 70})
    assert check_url(make_link("http://a.evil.test/x"), bl) is not None


def test_domain_boundary_rule():
    bl = Blocklist(domains={"evil.test": 70})
    # suffix must align on a label boundary at the end
    assert check_url(make_link("http://evil.test.example/x"), bl) is None
    assert check_url(make_link("http://notevil.test/x"), bl) is None


def test_cidr_hit():
    bl = Blocklist(cidrs=[(parse_ipv4("10.0.0.0"), 8, 70, "10.0.0.0/8")])
    flag = check_url(make_link("http://10.1.2.3/x"), bl)
    assert flag is not None
    assert flag.reason == "blocklisted_cidr"
    assert check_url(make_link("http://11.1.2.3/x"), bl) is None


def test_exact_url_hit():
    url = "http://evil.test/path?a=1"
    bl = Blocklist(urls={normalize_url(url)[0]: 70})
    assert check_url(make_link(url), bl) is not None
    assert check_url(make_link("http://evil.test/other"), bl) is None


def test_percent_decoded_url_comparison():
    bl = Blocklist(urls={"http://evil.test/a b": 70})
    assert check_url(make_link("http://evil.test/a%20b"), bl) is not None


def test_sender_exact_hit():
    bl = Blocklist(senders={"mallory@bad.test": 60})
    flag = check_sender(Address("mallory", "bad.test"), None, bl)
    assert flag is not None and flag.reason == "blocklisted_sender"


def test_sender_domain_hit():
    bl = Blocklist(domains={"evil.test": 70})
    assert check_sender(Address("x", "evil.test"), None, bl) is not None


def test_envelope_sender_checked():
    bl = Blocklist(senders={"mallory@bad.test": 60})
    flag = check_sender(Address("x", "good.test"), "mallory@bad.test", bl)
    assert flag is not None
    assert "envelope" in flag.evidence


def test_no_hit_on_clean():
    bl = Blocklist(domains={"evil.test": 70})
    assert check_url(make_link("http://good.test/x"), bl) is None
    assert check_sender(Address("a", "good.test"), None, bl) is None


# ---------------------------------------------------------------------------
# oracles

def test_cidr_integer_arithmetic_oracle():
    rng = random.Random(17)
    for _ in range(10_000):
        ip = rng.getrandbits(32)
        base = rng.getrandbits(32)
        prefix = rng.randint(0, 32)
        # oracle: (ip XOR base) >> (32 - prefix) == 0
        want = prefix == 0 or ((ip ^ base) >> (32 - prefix)) == 0
        assert cidr_contains(base, prefix, ip) == want


def test_cidr_matches_ipaddress_module():
    rng = random.Random(23)
    for _ in range(2000):
        ip = rng.getrandbits(32)
        base = rng.getrandbits(32)
        prefix = rng.randint(0, 32)
        net = ipaddress.ip_network((base, prefix), strict=False)
        assert cidr_contains(base, prefix, ip) == (ipaddress.ip_address(ip) in net)


def test_check_url_equals_linear_scan():
    rng = random.Random(31)
    hosts = [f"h{i}.zone{i % 7}.test" for i in range(200)]
    bl = Blocklist()
    for i in range(0, 1000):
        kind = rng.choice(["domain", "url", "cidr"])
        if kind == "domain":
            bl.domains[f"zone{rng.randint(0, 9)}.test"] = 70
        elif kind == "url":
            bl.urls[f"http://h{rng.randint(0, 250)}.zoneX.test/p{rng.randint(0, 5)}"] = 70
        else:
            base = rng.getrandbits(32)
            bl.cidrs.append((base, rng.randint(8, 32), 70, "r"))

    def linear_scan(link):
        host = link.host
        if link.url in bl.urls:
            return True
        for entry in bl.domains:
            if host == entry or host.endswith("." + entry):
                return True
        ip = parse_ipv4(host)
        if ip is not None:
            for base, prefix, _sev, _t in bl.cidrs:
                if prefix == 0 or ((ip ^ base) >> (32 - prefix)) == 0:
                    return True
        return False

    candidates = [make_link(f"http://{h}/p{i % 6}") for i, h in enumerate(hosts)]
    candidates += [
        make_link(f"http://{rng.randrange(256)}.{rng.randrange(256)}.{rng.randrange(256)}.{rng.randrange(256)}/x")
        for _ in range(200)
    ]
    for link in candidates:
        assert (check_url(link, bl) is not None) == linear_scan(link)
