#!/usr/bin/env python3
"""Renders the bundled chip map: two inlets and two outlets joined by curved
channels through a straight junction. 1 px = 1 um, walls black."""
import argparse
import math

WIDTH = HEIGHT = 160
HALF_WIDTH = 12.5  # channel half width, um


def eased_arm(x0, y0, x1, y1, n=400):
    pts = []
    for i in range(n + 1):
        t = i / n
        pts.append((x0 + (x1 - x0) * t, y0 + (y1 - y0) * (1 - math.cos(math.pi * t)) / 2))
    return pts


def centerline():
    pts = []
    pts += eased_arm(-5, 130, 60, 80)
    pts += eased_arm(-5, 30, 60, 80)
    pts += eased_arm(100, 80, 165, 130)
    pts += eased_arm(100, 80, 165, 30)
    pts += [(60 + i * 0.1, 80) for i in range(401)]
    return pts


def render():
    pts = centerline()
    r2 = HALF_WIDTH * HALF_WIDTH
    img = bytearray(WIDTH * HEIGHT)
    for row in range(HEIGHT):
        y = HEIGHT - 1 - row  # row 0 is the top of the image
        near = [(cx, cy) for cx, cy in pts if abs(cy - y) <= HALF_WIDTH]
        for x in range(WIDTH):
            if any((x - cx) ** 2 + (y - cy) ** 2 <= r2 for cx, cy in near):
                img[row * WIDTH + x] = 255
    return img


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("output")
    args = ap.parse_args()
    img = render()
    with open(args.output, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (WIDTH, HEIGHT))
        f.write(img)
    print("free pixels:", sum(1 for v in img if v))


if __name__ == "__main__":
    main()
