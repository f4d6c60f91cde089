namespace bubbleflow {
// implementation forthcoming
}
