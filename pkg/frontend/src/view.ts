// Zoom/pan between canvas space and original image pixel space. The view
// transform is presentation only: nothing that leaves the client is ever
// expressed in canvas coordinates.

export interface Point {
  x: number;
  y: number;
}

export class ViewTransform {
  constructor(
    public scale = 1,
    public offsetX = 0,
    public offsetY = 0,
  ) {}

  toCanvas(p: Point): Point {
    return { x: p.x * this.scale + this.offsetX, y: p.y * this.scale + this.offsetY };
  }

  toImage(p: Point): Point {
    return { x: (p.x - this.offsetX) / this.scale, y: (p.y - this.offsetY) / this.scale };
  }

  /** Image-space displacement corresponding to a canvas-space drag. */
  deltaToImage(dx: number, dy: number): Point {
    return { x: dx / this.scale, y: dy / this.scale };
  }

  /** Zoom by `factor`, keeping the canvas point `anchor` fixed on screen. */
  zoomAt(anchor: Point, factor: number): void {
    const before = this.toImage(anchor);
    this.scale *= factor;
    this.offsetX = anchor.x - before.x * this.scale;
    this.offsetY = anchor.y - before.y * this.scale;
  }

  panBy(dx: number, dy: number): void {
    this.offsetX += dx;
    this.offsetY += dy;
  }
}
