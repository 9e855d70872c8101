@problemName Gaps
@missing false
@classLabel true a b
@data
1,2,3:a
1,?,3:b
