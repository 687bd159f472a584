// Scaling between the response's natural image coordinates and the displayed
// element. Overlay rectangles must land within one pixel of the scaled truth.

export interface DisplayedRect {
  left: number;
  top: number;
  width: number;
  height: number;
}

export interface ViewGeometry {
  naturalWidth: number;
  naturalHeight: number;
  displayedWidth: number;
  displayedHeight: number;
}

export function scaleBox(
  box: [number, number, number, number],
  view: ViewGeometry,
): DisplayedRect {
  const sx = view.displayedWidth / view.naturalWidth;
  const sy = view.displayedHeight / view.naturalHeight;
  const [x0, y0, x1, y1] = box;
  return {
    left: x0 * sx,
    top: y0 * sy,
    width: (x1 - x0) * sx,
    height: (y1 - y0) * sy,
  };
}

export function rectStyle(rect: DisplayedRect): string {
  return (
    `left:${rect.left.toFixed(1)}px;top:${rect.top.toFixed(1)}px;` +
    `width:${rect.width.toFixed(1)}px;height:${rect.height.toFixed(1)}px`
  );
}
