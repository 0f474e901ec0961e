"""Regenerates the deterministic test fixtures in this directory.

    python3 make_fixtures.py

Outputs:
  github/issue_comments.json     137 issue-comment objects (Dec 2021 - Jan 2022)
  github/review_comments.json    12 pull-request review-comment objects
  synthetic_comments.csv         activity CSV: 3 templated bots + 9 humans
  tally_predictions.csv   predictions CSV with 37/6, 24/8, 6/2 bot tallies
"""
import csv
import datetime as dt
import io
import json
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))


def lev(a, b):
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def dist(a, b):
    m = max(len(a), len(b))
    return 0.0 if m == 0 else lev(a, b) / m


def norm(s):
    return " ".join(s.lower().split())


def stamp(t):
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


def github_fixtures():
    rng = random.Random(2022)
    start = dt.datetime(2021, 12, 1, 8, 0, 0)
    authors = ["bors-libra", "highfive", "alice-dev", "bob-k", "carol", "dmitri", "eve-sec", None]
    comments = []
    t = start
    for i in range(137):
        t += dt.timedelta(minutes=rng.randint(5, 600))
        number = rng.randint(1, 400)
        is_pr = rng.random() < 0.5
        author = rng.choice(authors)
        kind = "pull" if is_pr else "issues"
        cid = 990000000 + i * 7
        comments.append({
            "id": cid,
            "user": None if author is None else {"login": author, "type": "User"},
            "created_at": stamp(t),
            "updated_at": stamp(t),
            "body": f"comment {i} on #{number}, \"quoted\"\nsecond line",
            "html_url": f"https://github.com/diem/diem/{kind}/{number}#issuecomment-{cid}",
            "issue_url": f"https://api.github.com/repos/diem/diem/issues/{number}",
        })
    assert comments[-1]["created_at"] < "2022-02-01"
    with open(os.path.join(HERE, "github", "issue_comments.json"), "w") as f:
        json.dump(comments, f, indent=1)

    reviews = []
    t = start
    for i in range(12):
        t += dt.timedelta(hours=rng.randint(1, 90))
        number = rng.randint(1, 400)
        cid = 880000000 + i
        reviews.append({
            "id": cid,
            "user": {"login": rng.choice(authors[2:7])},
            "created_at": stamp(t),
            "body": f"nit: rename this ({i})",
            "html_url": f"https://github.com/diem/diem/pull/{number}#discussion_r{cid}",
            "pull_request_url": f"https://api.github.com/repos/diem/diem/pulls/{number}",
        })
    with open(os.path.join(HERE, "github", "review_comments.json"), "w") as f:
        json.dump(reviews, f, indent=1)


WORDS = """parser release windows nightly docs readme review merge branch tests flaky timeout
memory leak allocator borrow checker lifetime trait generic macro async runtime tokio thread
panic unwrap error message stack trace benchmark regression performance cache config feature
flag dependency version bump changelog license ci pipeline linker target wasm arm build cargo
lockfile workspace crate module visibility refactor rename typo example tutorial blog api
endpoint client server socket tls certificate proxy header cookie session token permission""".split()

OPENERS = ["I think", "Could we", "Maybe", "Not sure but", "FWIW", "Hmm,", "Quick question:", "Thanks!",
           "Looks like", "On my machine", "Agreed,", "Let's", "Why does", "Have you tried", "Nice catch,"]


def human_comment(rng):
    words = rng.sample(WORDS, rng.randint(6, 13))
    text = rng.choice(OPENERS) + " " + " ".join(words)
    if rng.random() < 0.3:
        text += ", " + rng.choice(["right?", "no?", "see \"docs\"", "thoughts?"])
    if rng.random() < 0.2:
        text += "\n\n" + rng.choice(["cc @maintainers", "Cheers", "(edited)"])
    return text


def perturb(rng, template, frac):
    chars = list(template)
    k = int(len(chars) * frac)
    for pos in rng.sample(range(len(chars)), k):
        chars[pos] = rng.choice("abcdefghijklmnopqrstuvwxyz0123456789")
    return "".join(chars)


def synthetic_corpus():
    rng = random.Random(7)
    bots = {
        ("example/alpha", "ci-runner"): [
            "Build succeeded on all targets. Artifacts are attached to the workflow run.",
            "Build failed on target x86_64-pc-windows-msvc. See the logs for the failing step.",
        ],
        ("example/alpha", "merge-queue"): [
            "Testing commit before merging into the main branch. This may take a while.",
            "Tests passed, merging this pull request into main now.",
            "Merge conflict detected, please rebase onto the latest main and push again.",
        ],
        ("example/beta", "greeter"): [
            "Thanks for the pull request, and welcome! A maintainer will review it soon.",
            "Hello and thank you for opening this issue. Please fill in the template fields.",
        ],
    }
    humans = [("example/alpha", h) for h in ["ana", "ben-o", "chidi", "dora", "eli"]] + \
             [("example/beta", h) for h in ["fatima", "gus", "hana", "ivan"]]

    rows = []
    t0 = dt.datetime(2021, 12, 2, 9, 0, 0)
    for (repo, login), templates in bots.items():
        n = rng.randint(30, 40)
        for i in range(n):
            tpl = templates[i % len(templates)]
            body = perturb(rng, tpl, rng.choice([0.0, 0.05, 0.1, 0.15]))
            rows.append((repo, login, body))
    for repo, login in humans:
        n = rng.randint(10, 18)
        mine = []
        while len(mine) < n:
            c = human_comment(rng)
            if all(dist(norm(c), norm(o)) > 0.3 for o in mine):
                mine.append(c)
        rows.extend((repo, login, c) for c in mine)

    rng.shuffle(rows)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["repository", "activity_type", "number", "author", "created_at", "body"])
    t = t0
    for repo, login, body in rows:
        t += dt.timedelta(minutes=rng.randint(3, 200))
        kind = rng.choice(["issue", "pull_request"])
        w.writerow([repo, kind, rng.randint(1, 300), login, stamp(t), body])
    with open(os.path.join(HERE, "synthetic_comments.csv"), "w", newline="") as f:
        f.write(out.getvalue())


def tally_counts():
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["repository", "login", "num_comments", "num_empty", "num_patterns", "gini",
                "pattern_ratio", "predicted", "confidence", "override", "effective"])
    for repo, total, bots in [("paritytech/substrate", 37, 6), ("diem/diem", 24, 8), ("servo/servo", 6, 2)]:
        for i in range(total):
            if i < bots:
                w.writerow([repo, f"bot-{i:02d}", 60, 0, 3, "0.400000", "0.050000", "bot", "0.900000", "", "bot"])
            else:
                w.writerow([repo, f"dev-{i:02d}", 25, 1, 24, "0.040000", "0.960000", "human", "0.800000", "", "human"])
    with open(os.path.join(HERE, "tally_predictions.csv"), "w", newline="") as f:
        f.write(out.getvalue())


if __name__ == "__main__":
    github_fixtures()
    synthetic_corpus()
    tally_counts()
