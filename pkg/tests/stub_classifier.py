#!/usr/bin/env python3
"""Line-protocol classifier stub for the subprocess adapter tests.

Reads one JSON request per stdin line and answers with the mean pixel
value as the probability. Optional argv[1] selects a misbehaviour mode:
crash, slow, garbage, or wrong-id.
"""
import base64
import json
import struct
import sys
import time


def main():
    mode = sys.argv[1] if len(sys.argv) > 1 else "mean"
    for line in sys.stdin:
        request = json.loads(line)
        if mode == "crash":
            sys.exit(3)
        if mode == "slow":
            time.sleep(5.0)
        if mode == "garbage":
            sys.stdout.write("this is not json\n")
            sys.stdout.flush()
            continue
        n = request["width"] * request["height"]
        pixels = struct.unpack("<%df" % n, base64.b64decode(request["pixels_b64"]))
        reply_id = request["id"] + (1 if mode == "wrong-id" else 0)
        reply = {"id": reply_id, "probability": sum(pixels) / n}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
