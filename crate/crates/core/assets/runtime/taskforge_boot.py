"""Runs a script under an audit hook that enforces the sandbox policy.

Usage: python taskforge_boot.py SCRIPT [ARGS...]

Policy comes from the environment:
  TASKFORGE_DENY_READ  os.pathsep-separated directories that may not be opened
  TASKFORGE_NO_NET     "1" blocks socket creation and connection
  TASKFORGE_NO_SPAWN   "1" blocks subprocess and exec calls
"""

import os
import runpy
import sys


def _deny_roots():
    raw = os.environ.get("TASKFORGE_DENY_READ", "")
    return [os.path.realpath(p) for p in raw.split(os.pathsep) if p]


def _install(deny, no_net, no_spawn):
    sep = os.sep

    def under_denied(path):
        try:
            path = os.fsdecode(path)
        except TypeError:
            return False
        real = os.path.realpath(path)
        return any(real == d or real.startswith(d + sep) for d in deny)

    spawn_events = {
        "subprocess.Popen",
        "os.system",
        "os.exec",
        "os.posix_spawn",
        "os.spawn",
        "os.fork",
        "os.forkpty",
        "pty.spawn",
    }
    net_events = {"socket.__new__", "socket.connect", "socket.bind", "socket.getaddrinfo"}
    path_events = {"open", "os.listdir", "os.scandir", "shutil.copyfile", "os.rename"}

    def hook(event, args):
        if deny and event in path_events and args:
            target = args[0]
            if isinstance(target, int):
                return
            if under_denied(target):
                raise PermissionError("sandbox: access denied: %s" % os.fsdecode(target))
        elif no_spawn and event in spawn_events:
            raise PermissionError("sandbox: process spawning is disabled")
        elif no_net and event in net_events:
            raise PermissionError("sandbox: network access is disabled")

    sys.addaudithook(hook)


def run():
    if len(sys.argv) < 2:
        print("usage: taskforge_boot.py SCRIPT [ARGS...]", file=sys.stderr)
        sys.exit(2)
    script = os.path.abspath(sys.argv[1])
    _install(
        _deny_roots(),
        os.environ.get("TASKFORGE_NO_NET") == "1",
        os.environ.get("TASKFORGE_NO_SPAWN") == "1",
    )
    sys.argv = sys.argv[1:]
    sys.path.insert(0, os.path.dirname(script))
    runpy.run_path(script, run_name="__main__")


if __name__ == "__main__":
    run()
